//! Self-checks: finite-difference gradient checks of every energy term and
//! numerical invariants of the core transforms.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arap::{arap_energy, ArapReference};
use crate::gloss::{initial_params, GlossModel, GlossProblem, GlossWeights, PoseBasisConfig};
use crate::imagefit::{
    e_kp, e_lim, image_energy, project, projection_backward, reference_scale, silhouette_energy,
    squared_distance_transform, Camera, EdgeFaces, FitParams, ImageFitConfig, ImageFitWeights,
    Mask, SilhouetteTarget, Vec2,
};
use crate::mesh::rotation::matrix_to_rodrigues;
use crate::mesh::{rodrigues_to_matrix, Mesh, Vec3};
use crate::optim::{check_gradient, FnObjective, Objective};
use crate::smal::{
    backward, build_shape_space, forward, pose_normalize, symmetrize, Rig, ScanProblem,
    SmalFitConfig, SmalFitWeights, SmalModel, SmalParams,
};
use crate::synth::{
    ground_truth_model, make_template, random_scene, sample_animal, SceneSpec, SynthSpec, Template,
    TemplateSpec,
};
use crate::Result;

/// Gradient tolerance of 3D terms and smooth 2D terms.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Gradient tolerance of the silhouette term.
pub const SILHOUETTE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Random evaluation points per gradient check.
    pub points: usize,
    /// Random cases per invariant check.
    pub cases: usize,
    pub seed: u64,
    /// Template resolution of the test models.
    pub resolution: usize,
    /// Corrupt one analytic gradient to exercise the failure path.
    pub fault_injection: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            points: 20,
            cases: 50,
            seed: 11,
            resolution: 1,
            fault_injection: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Gradient,
    Invariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub cases: usize,
    /// Largest relative gradient error or largest invariant residual.
    pub max_error: f64,
    pub threshold: f64,
    pub passed: bool,
    pub seconds: f64,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn finish(
    name: &str,
    kind: CheckKind,
    cases: usize,
    outcome: Result<f64>,
    threshold: f64,
    start: Instant,
) -> CheckResult {
    let (max_error, detail) = match outcome {
        Ok(e) => (e, None),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    };
    CheckResult {
        name: name.to_string(),
        kind,
        cases,
        max_error,
        threshold,
        passed: max_error < threshold,
        seconds: start.elapsed().as_secs_f64(),
        detail,
    }
}

/// Largest relative gradient error of `f` over `points`.
fn max_gradient_error(f: &dyn Objective, points: &[Vec<f64>], eps: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in points {
        worst = worst.max(check_gradient(f, x, eps)?.max_relative_error);
    }
    Ok(worst)
}

/// Relative gradient error at `x`, or `None` when central differences with
/// steps `eps` and `eps / 4` disagree, i.e. a discontinuity lies within
/// `eps` of `x` along some coordinate.
fn stable_gradient_error(f: &dyn Objective, x: &[f64], eps: f64) -> Option<f64> {
    let n = x.len();
    let mut grad = vec![0.0; n];
    f.evaluate(x, &mut grad);
    let mut scratch = vec![0.0; n];
    let mut xp = x.to_vec();
    let mut diff = |i: usize, h: f64| {
        xp[i] = x[i] + h;
        let fp = f.evaluate(&xp, &mut scratch);
        xp[i] = x[i] - h;
        let fm = f.evaluate(&xp, &mut scratch);
        xp[i] = x[i];
        (fp - fm) / (2.0 * h)
    };
    let mut worst = 0.0f64;
    for (i, &g) in grad.iter().enumerate().take(n) {
        let coarse = diff(i, eps);
        let fine = diff(i, eps / 4.0);
        let scale = coarse.abs().max(1.0);
        if !(coarse.is_finite() && fine.is_finite()) || (coarse - fine).abs() > 1e-4 * scale {
            return None;
        }
        worst = worst.max((g - coarse).abs() / g.abs().max(1.0));
    }
    Some(worst)
}

/// A term name and the switch enabling it.
type TermToggle<W> = (&'static str, fn(&mut W));

/// `f` with a slightly wrong first gradient coordinate.
struct Faulty<'a>(&'a dyn Objective);

impl Objective for Faulty<'_> {
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.0.evaluate(x, grad);
        grad[0] = grad[0] * 1.01 + 0.01;
        v
    }
}

struct Fixture {
    template: Template,
    model: SmalModel,
}

impl Fixture {
    fn new(config: &VerifyConfig) -> Result<Self> {
        let template = make_template(&TemplateSpec::with_resolution(config.resolution))?;
        let model = ground_truth_model(&template, 4, 10, config.seed)?;
        Ok(Self { template, model })
    }
}

fn gloss_checks(fx: &Fixture, config: &VerifyConfig, out: &mut Vec<CheckResult>) -> Result<()> {
    let gloss = GlossModel::build(&fx.template, &PoseBasisConfig::default())?;
    let animal = sample_animal(&fx.template, &SynthSpec::default(), config.seed)?;
    let base = gloss.layout.flatten(&initial_params(
        &gloss,
        &animal.scan.vertices,
        &animal.keypoints,
    ))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points: Vec<Vec<f64>> = (0..config.points)
        .map(|_| {
            base.iter()
                .map(|v| v + rng.random_range(-0.05..0.05))
                .collect()
        })
        .collect();
    let zero = GlossWeights {
        smooth: 0.0,
        shape: 0.0,
        deform: 0.0,
        stitch: 0.0,
        keypoint: 0.0,
        model_to_scan: 0.0,
        scan_to_model: 0.0,
        curvature: 0.0,
        tail: 0.0,
        ..GlossWeights::default()
    };
    let terms: [TermToggle<GlossWeights>; 9] = [
        ("smooth", |w| w.smooth = 1.0),
        ("shape", |w| w.shape = 1.0),
        ("deform", |w| w.deform = 1.0),
        ("stitch", |w| w.stitch = 1.0),
        ("keypoint", |w| w.keypoint = 1.0),
        ("model_to_scan", |w| w.model_to_scan = 1.0),
        ("scan_to_model", |w| w.scan_to_model = 1.0),
        ("curvature", |w| w.curvature = 1.0),
        ("tail", |w| w.tail = 1.0),
    ];
    for (name, set) in terms {
        let start = Instant::now();
        let mut w = zero;
        set(&mut w);
        let outcome = (|| {
            let mut problem =
                GlossProblem::new(&gloss, &animal.scan.vertices, &animal.keypoints, w)?;
            let mut worst = 0.0f64;
            for x in &points {
                // Correspondences are frozen at each point.
                problem.refresh(x);
                worst = worst.max(check_gradient(&problem, x, 1e-6)?.max_relative_error);
            }
            Ok(worst)
        })();
        out.push(finish(
            &format!("gloss.{name}"),
            CheckKind::Gradient,
            points.len(),
            outcome,
            GRADIENT_TOLERANCE,
            start,
        ));
    }
    Ok(())
}

fn arap_check(fx: &Fixture, config: &VerifyConfig, out: &mut Vec<CheckResult>) -> Result<()> {
    let start = Instant::now();
    let mesh = &fx.template.mesh;
    let reference = ArapReference::new(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + 1);
    let rotations: Vec<Matrix3<f64>> = (0..mesh.vertex_count())
        .map(|_| {
            rodrigues_to_matrix(&Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                0.3,
            ))
        })
        .collect();
    let f = FnObjective::new(3 * mesh.vertex_count(), |x: &[f64], g: &mut [f64]| {
        let v: Vec<Vec3> = x.chunks(3).map(Vec3::from_column_slice).collect();
        let (e, grad) = arap_energy(&v, &rotations, &reference).expect("matching sizes");
        for (i, gv) in grad.iter().enumerate() {
            g[3 * i..3 * i + 3].copy_from_slice(gv.as_slice());
        }
        e
    });
    let points: Vec<Vec<f64>> = (0..config.points)
        .map(|_| {
            mesh.vertices
                .iter()
                .flat_map(|p| [p.x, p.y, p.z])
                .map(|c| c + rng.random_range(-0.05..0.05))
                .collect()
        })
        .collect();
    let outcome = if config.fault_injection {
        max_gradient_error(&Faulty(&f), &points, 1e-6)
    } else {
        max_gradient_error(&f, &points, 1e-6)
    };
    out.push(finish(
        "arap.energy",
        CheckKind::Gradient,
        points.len(),
        outcome,
        GRADIENT_TOLERANCE,
        start,
    ));
    Ok(())
}

fn smal_checks(fx: &Fixture, config: &VerifyConfig, out: &mut Vec<CheckResult>) -> Result<()> {
    let model = &fx.model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + 2);
    let truth = SmalParams {
        beta: model
            .shape_space
            .eigenvalues
            .iter()
            .map(|l| l.sqrt() * rng.random_range(-1.0..1.0))
            .collect(),
        theta: crate::synth::sample_pose(
            &mut rng,
            &crate::synth::PoseRanges::default().scaled(0.5),
        ),
        gamma: Vec3::new(0.1, -0.05, 0.2),
    };
    let scan = crate::smal::smal_instance(model, &truth.beta, &truth.theta, &truth.gamma)?;
    let keypoints: Vec<(String, Vec3)> = model
        .rig
        .scan_keypoints
        .iter()
        .map(|(k, v)| (k.clone(), scan.vertices[*v]))
        .collect();
    let points: Vec<Vec<f64>> = (0..config.points)
        .map(|_| {
            let mut x: Vec<f64> = truth
                .beta
                .iter()
                .map(|b| b + 0.1 * rng.random_range(-1.0..1.0))
                .collect();
            x.extend(truth.theta.iter().map(|t| t + rng.random_range(-0.1..0.1)));
            x.extend(
                truth
                    .gamma
                    .iter()
                    .map(|g| g + rng.random_range(-0.05..0.05)),
            );
            x
        })
        .collect();
    let terms: [TermToggle<SmalFitWeights>; 5] = [
        ("pose_prior", |w| w.pose = 1.0),
        ("shape_prior", |w| w.shape = 1.0),
        ("keypoint", |w| w.keypoint = 1.0),
        ("model_to_scan", |w| w.model_to_scan = 1.0),
        ("scan_to_model", |w| w.scan_to_model = 1.0),
    ];
    for (name, set) in terms {
        let start = Instant::now();
        let mut weights = SmalFitWeights {
            pose: 0.0,
            shape: 0.0,
            keypoint: 0.0,
            model_to_scan: 0.0,
            scan_to_model: 0.0,
            ..SmalFitWeights::default()
        };
        set(&mut weights);
        let fit = SmalFitConfig {
            weights,
            ..SmalFitConfig::default()
        };
        let outcome = (|| {
            let mut problem = ScanProblem::new(model, &scan, &keypoints, &fit)?;
            let mut worst = 0.0f64;
            for x in &points {
                problem.refresh(x);
                worst = worst.max(check_gradient(&problem, x, 1e-6)?.max_relative_error);
            }
            Ok(worst)
        })();
        out.push(finish(
            &format!("smal.{name}"),
            CheckKind::Gradient,
            points.len(),
            outcome,
            GRADIENT_TOLERANCE,
            start,
        ));
    }
    Ok(())
}

fn perturbed(p: &FitParams, rng: &mut impl Rng, s: f64) -> FitParams {
    let mut q = p.clone();
    q.beta
        .iter_mut()
        .for_each(|b| *b += 0.01 * s * rng.random_range(-1.0..1.0));
    q.theta
        .iter_mut()
        .for_each(|t| *t += 0.05 * s * rng.random_range(-1.0..1.0));
    q.gamma += Vec3::new(0.05, -0.03, 0.1) * s;
    q.focal *= 1.0 + 0.03 * s;
    q
}

fn flat_objective<'a>(
    n_beta: usize,
    dim: usize,
    f: impl Fn(&FitParams) -> Result<(f64, Vec<f64>)> + 'a,
) -> FnObjective<impl Fn(&[f64], &mut [f64]) -> f64 + 'a> {
    FnObjective::new(dim, move |x: &[f64], g: &mut [f64]| {
        match f(&FitParams::unflatten(x, n_beta)) {
            Ok((v, grad)) => {
                g.copy_from_slice(&grad);
                v
            }
            Err(_) => f64::NAN,
        }
    })
}

/// Candidate points tried per requested silhouette check point.
const SILHOUETTE_ATTEMPTS: usize = 5;

/// Silhouette gradient check at `config.points` stable points near a
/// rendered scene; returns the error and the number of points checked.
fn silhouette_check(
    model: &SmalModel,
    config: &VerifyConfig,
    rng: &mut ChaCha8Rng,
) -> (Result<f64>, usize) {
    let scene = match random_scene(model, &scene_spec(256), rng) {
        Ok(s) => s,
        Err(e) => return (Err(e), 0),
    };
    let obs = &scene.observation;
    let target = match SilhouetteTarget::new(
        obs.silhouette.clone(),
        reference_scale(obs.resolution),
        10.0,
    ) {
        Ok(t) => t,
        Err(e) => return (Err(e), 0),
    };
    let edges = EdgeFaces::new(&model.rig.faces);
    let nb = scene.params.beta.len();
    let f = flat_objective(nb, scene.params.flatten().len(), |p| {
        let posed = forward(model, &p.beta, &p.theta, &p.gamma)?;
        let camera = Camera::centered(p.focal, obs.resolution[0], obs.resolution[1]);
        let projected = project(&posed.vertices, camera.focal, camera.principal())?;
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
        let (g3, g_f) = projection_backward(&posed.vertices, p.focal, &grad2);
        let (gb, gt, gg) = backward(model, &posed, &g3, p.beta.len());
        let mut g = gb;
        g.extend(gt);
        g.extend_from_slice(gg.as_slice());
        g.push(g_f);
        Ok((parts.consistency + parts.coverage, g))
    });
    let mut worst = 0.0f64;
    let mut used = 0;
    for k in 0..config.points * SILHOUETTE_ATTEMPTS {
        if used == config.points {
            break;
        }
        let x = perturbed(&scene.params, rng, 1.0 + (k % 5) as f64).flatten();
        if let Some(e) = stable_gradient_error(&f, &x, 1e-7) {
            worst = worst.max(e);
            used += 1;
        }
    }
    if used < config.points {
        return (
            Err(crate::Error::InvalidArgument(format!(
                "only {used} of {} silhouette points were stable",
                config.points
            ))),
            used,
        );
    }
    (Ok(worst), used)
}

fn scene_spec(size: usize) -> SceneSpec {
    SceneSpec {
        resolution: [size, size],
        ..SceneSpec::default()
    }
}

fn image_checks(fx: &Fixture, config: &VerifyConfig, out: &mut Vec<CheckResult>) -> Result<()> {
    let model = &fx.model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + 3);
    // Keypoint and prior terms do not depend on the image size.
    let scene = random_scene(model, &scene_spec(128), &mut rng)?;
    let obs = &scene.observation;
    let params: Vec<FitParams> = (0..config.points)
        .map(|k| perturbed(&scene.params, &mut rng, 1.0 + (k % 5) as f64))
        .collect();
    let nb = scene.params.beta.len();
    let dim = scene.params.flatten().len();
    let points: Vec<Vec<f64>> = params.iter().map(|p| p.flatten()).collect();

    let start = Instant::now();
    let kp = flat_objective(nb, dim, |p| e_kp(model, p, obs, 50.0));
    out.push(finish(
        "image.keypoint",
        CheckKind::Gradient,
        points.len(),
        max_gradient_error(&kp, &points, 1e-6),
        GRADIENT_TOLERANCE,
        start,
    ));

    let start = Instant::now();
    let (outcome, used) = silhouette_check(model, config, &mut rng);
    out.push(finish(
        "image.silhouette",
        CheckKind::Gradient,
        used,
        outcome,
        SILHOUETTE_TOLERANCE,
        start,
    ));

    let start = Instant::now();
    let nt = scene.params.theta.len();
    let lim = FnObjective::new(nt, |x: &[f64], g: &mut [f64]| {
        let (v, grad) = e_lim(x, &model.pose_limits);
        g.copy_from_slice(&grad);
        v
    });
    // Points straddle the limits without sitting on a kink.
    let theta_points: Vec<Vec<f64>> = (0..config.points)
        .map(|_| {
            model
                .pose_limits
                .min
                .iter()
                .zip(&model.pose_limits.max)
                .map(|(lo, hi)| {
                    let (lo, hi) = (lo.max(-2.0), hi.min(2.0));
                    let t = rng.random_range(lo - 0.5..hi + 0.5);
                    if (t - lo).abs() < 1e-3 || (t - hi).abs() < 1e-3 {
                        t + 2e-3
                    } else {
                        t
                    }
                })
                .collect()
        })
        .collect();
    out.push(finish(
        "image.limit",
        CheckKind::Gradient,
        theta_points.len(),
        max_gradient_error(&lim, &theta_points, 1e-6),
        GRADIENT_TOLERANCE,
        start,
    ));

    let none = ImageFitWeights {
        keypoint: 0.0,
        silhouette: 0.0,
        shape: 0.0,
        pose: 0.0,
        limit: 0.0,
    };
    let priors: [(&str, ImageFitWeights, Option<f64>); 3] = [
        (
            "image.shape_prior",
            ImageFitWeights {
                shape: 1.0,
                ..none.clone()
            },
            None,
        ),
        (
            "image.pose_prior",
            ImageFitWeights {
                pose: 1.0,
                ..none.clone()
            },
            None,
        ),
        ("image.anchor", none.clone(), Some(1.0)),
    ];
    for (name, weights, anchor_weight) in priors {
        let start = Instant::now();
        let fit = ImageFitConfig {
            weights,
            anchor_weight,
            shape_components: Some(nb),
            ..ImageFitConfig::default()
        };
        let anchor = anchor_weight.map(|_| &scene.params);
        let f = flat_objective(nb, dim, |p| {
            let (terms, g) = image_energy(model, obs, &fit, p, anchor)?;
            Ok((terms.total, g))
        });
        out.push(finish(
            name,
            CheckKind::Gradient,
            points.len(),
            max_gradient_error(&f, &points, 1e-6),
            GRADIENT_TOLERANCE,
            start,
        ));
    }
    Ok(())
}

/// Gradient checks of every energy term at `config.points` random points.
pub fn gradient_suite(config: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let fx = Fixture::new(config)?;
    let mut out = Vec::new();
    gloss_checks(&fx, config, &mut out)?;
    arap_check(&fx, config, &mut out)?;
    smal_checks(&fx, config, &mut out)?;
    image_checks(&fx, config, &mut out)?;
    Ok(out)
}

fn max_vertex_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

/// Uniform pose inside the joint limits, with unbounded axes capped at ±1.
pub fn pose_within_limits(rng: &mut impl Rng, model_limits: &crate::smal::PoseLimits) -> Vec<f64> {
    model_limits
        .min
        .iter()
        .zip(&model_limits.max)
        .map(|(lo, hi)| rng.random_range(lo.max(-1.0)..=hi.min(1.0)))
        .collect()
}

fn lbs_round_trip(fx: &Fixture, config: &VerifyConfig) -> Result<f64> {
    let rig = Rig::from_template(&fx.template);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + 4);
    let mut worst = 0.0f64;
    for _ in 0..config.cases {
        let theta = pose_within_limits(&mut rng, &fx.model.pose_limits);
        let gamma = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let posed = rig.pose(&fx.template.mesh.vertices, &theta, &gamma)?;
        let neutral = pose_normalize(&rig, &posed, &theta, &gamma)?;
        worst = worst.max(max_vertex_distance(&neutral, &fx.template.mesh.vertices));
        worst = worst.max(max_vertex_distance(
            &rig.pose(&neutral, &theta, &gamma)?,
            &posed,
        ));
    }
    Ok(worst)
}

fn edt_brute_force(config: &VerifyConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + 5);
    let mut worst = 0.0f64;
    for _ in 0..config.cases {
        let density = rng.random_range(0.001..0.3);
        let bits: Vec<bool> = (0..64 * 64).map(|_| rng.random_bool(density)).collect();
        let mut mask = Mask::from_fn(64, 64, |x, y| bits[y * 64 + x]);
        if mask.is_empty() {
            mask.set(rng.random_range(0..64), rng.random_range(0..64), true);
        }
        let inside: Vec<(i64, i64)> = mask.pixels().map(|(x, y)| (x as i64, y as i64)).collect();
        let fast = squared_distance_transform(&mask)?;
        for y in 0..64i64 {
            for x in 0..64i64 {
                let brute = inside
                    .iter()
                    .map(|(a, b)| (a - x).pow(2) + (b - y).pow(2))
                    .min()
                    .unwrap_or(0);
                worst = worst.max((fast[(y * 64 + x) as usize] - brute).abs() as f64);
            }
        }
    }
    Ok(worst)
}

fn rotation_round_trip(config: &VerifyConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + 6);
    let mut worst = 0.0f64;
    for _ in 0..config.cases {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let r = axis.normalize() * rng.random_range(0.0..3.0);
        worst = worst.max((matrix_to_rodrigues(&rodrigues_to_matrix(&r)) - r).norm());
    }
    Ok(worst)
}

fn symmetrize_idempotent(fx: &Fixture, config: &VerifyConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + 7);
    let mesh = &fx.template.mesh;
    let noisy = mesh.with_vertices(
        mesh.vertices
            .iter()
            .map(|v| {
                v + Vec3::new(
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                    0.01,
                )
            })
            .collect(),
    );
    let once = symmetrize(&noisy, &fx.template.pairing)?;
    let twice = symmetrize(&once, &fx.template.pairing)?;
    let mut worst = max_vertex_distance(&once.vertices, &twice.vertices);
    for (i, &j) in fx.template.pairing.iter().enumerate() {
        let (a, b) = (once.vertices[i], once.vertices[j]);
        worst = worst.max((a - Vec3::new(-b.x, b.y, b.z)).norm());
    }
    Ok(worst)
}

fn shape_space_orthonormal(fx: &Fixture) -> Result<f64> {
    let b = &fx.model.shape_space.basis;
    let gram = b.transpose() * b - DMatrix::identity(b.ncols(), b.ncols());
    Ok(gram.abs().max())
}

fn shape_space_reconstruction(fx: &Fixture, config: &VerifyConfig) -> Result<f64> {
    let shapes = crate::synth::family_shapes(&fx.template, 2, 0.08, config.seed + 8)?;
    let meshes: Vec<Mesh> = shapes.into_iter().map(|(_, m)| m).collect();
    let space = build_shape_space(&meshes, meshes.len() - 1)?;
    let mut worst = 0.0f64;
    for m in &meshes {
        let beta = space.project(&m.vertices, space.dim())?;
        worst = worst.max(max_vertex_distance(&space.reconstruct(&beta)?, &m.vertices));
    }
    Ok(worst)
}

fn model_serialization(fx: &Fixture) -> Result<f64> {
    let text = serde_json::to_string(&fx.model)?;
    let again = serde_json::to_string(&SmalModel::from_json(&text)?)?;
    Ok(if text == again { 0.0 } else { 1.0 })
}

/// Invariants of skinning, rotations, distance transforms, symmetrization,
/// the shape space and model files.
pub fn invariant_suite(config: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let fx = Fixture::new(config)?;
    let n = config.cases;
    let mut out = Vec::new();
    let mut run = |name: &str, cases: usize, threshold: f64, f: &dyn Fn() -> Result<f64>| {
        let start = Instant::now();
        out.push(finish(
            name,
            CheckKind::Invariant,
            cases,
            f(),
            threshold,
            start,
        ));
    };
    run("lbs.round_trip", n, 1e-6, &|| lbs_round_trip(&fx, config));
    run("rotation.round_trip", n, 1e-9, &|| {
        rotation_round_trip(config)
    });
    run("edt.brute_force", n, 0.5, &|| edt_brute_force(config));
    run("symmetrize.idempotent", 1, 1e-12, &|| {
        symmetrize_idempotent(&fx, config)
    });
    run("shape_space.orthonormal", 1, 1e-9, &|| {
        shape_space_orthonormal(&fx)
    });
    run("shape_space.reconstruction", 1, 1e-8, &|| {
        shape_space_reconstruction(&fx, config)
    });
    run("model.serialization", 1, 0.5, &|| model_serialization(&fx));
    Ok(out)
}

/// Both suites.
pub fn run(config: &VerifyConfig) -> Result<VerifyReport> {
    let mut checks = gradient_suite(config)?;
    checks.extend(invariant_suite(config)?);
    Ok(VerifyReport { checks })
}
