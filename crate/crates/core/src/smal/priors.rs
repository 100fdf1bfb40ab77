//! Gaussian pose and shape priors and joint-angle limits.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::shape_space::MatrixFile;
use crate::mesh::KinematicTree;
use crate::synth::{is_leg, is_tail, JAW, LEFT_EAR, LEFT_EYE, RIGHT_EAR, RIGHT_EYE};
use crate::{Error, Result};

/// Diagonal loading added to the pose covariance.
pub const POSE_PRIOR_LOADING: f64 = 1e-4;
/// Variance of the root rotation, which is effectively unconstrained.
pub const ROOT_POSE_VARIANCE: f64 = 1e4;
/// Family covariance loading as a fraction of the mean global eigenvalue.
pub const FAMILY_LOADING_FRACTION: f64 = 1e-3;

/// Multivariate normal with a cached precision matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GaussianFile", try_from = "GaussianFile")]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct GaussianFile {
    mean: Vec<f64>,
    covariance: MatrixFile,
}

impl From<Gaussian> for GaussianFile {
    fn from(g: Gaussian) -> Self {
        Self {
            mean: g.mean.as_slice().to_vec(),
            covariance: MatrixFile::from_matrix(&g.covariance),
        }
    }
}

impl TryFrom<GaussianFile> for Gaussian {
    type Error = String;

    fn try_from(f: GaussianFile) -> std::result::Result<Self, String> {
        Gaussian::new(DVector::from_vec(f.mean), f.covariance.into_matrix()?)
            .map_err(|e| e.to_string())
    }
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::Dimension {
                what: "covariance",
                expected: d,
                got: covariance.nrows(),
            });
        }
        let precision = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?
            .inverse();
        Ok(Self {
            mean,
            covariance,
            precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Squared Mahalanobis distance and its gradient.
    pub fn mahalanobis(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = DVector::from_column_slice(x) - &self.mean;
        let pd = &self.precision * &d;
        (d.dot(&pd), (pd * 2.0).as_slice().to_vec())
    }
}

pub type PosePrior = Gaussian;

/// Shape-coefficient Gaussian for one animal family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyPrior {
    #[serde(flatten)]
    pub gaussian: Gaussian,
    pub samples: usize,
}

/// Joint-angle bounds; infinite bounds are stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LimitsFile", from = "LimitsFile")]
pub struct PoseLimits {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LimitsFile {
    min: Vec<Option<f64>>,
    max: Vec<Option<f64>>,
}

impl From<PoseLimits> for LimitsFile {
    fn from(l: PoseLimits) -> Self {
        let enc = |v: Vec<f64>| v.into_iter().map(|x| x.is_finite().then_some(x)).collect();
        Self {
            min: enc(l.min),
            max: enc(l.max),
        }
    }
}

impl From<LimitsFile> for PoseLimits {
    fn from(f: LimitsFile) -> Self {
        Self {
            min: f
                .min
                .into_iter()
                .map(|x| x.unwrap_or(f64::NEG_INFINITY))
                .collect(),
            max: f
                .max
                .into_iter()
                .map(|x| x.unwrap_or(f64::INFINITY))
                .collect(),
        }
    }
}

impl PoseLimits {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(t, (lo, hi))| lo <= t && t <= hi)
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (t, (lo, hi)) in theta.iter_mut().zip(self.min.iter().zip(&self.max)) {
            *t = t.clamp(*lo, *hi);
        }
    }

    /// `Σ max(θ - θ_max, 0) + max(θ_min - θ, 0)` and its (sub)gradient.
    pub fn hinge(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for (i, t) in theta.iter().enumerate() {
            if *t > self.max[i] {
                value += t - self.max[i];
                grad[i] = 1.0;
            } else if *t < self.min[i] {
                value += self.min[i] - t;
                grad[i] = -1.0;
            }
        }
        (value, grad)
    }
}

/// Hand-set limits for the quadruped template: spine, neck and head ±0.5 per
/// axis; legs ±1.5 in flexion and ±0.3 otherwise; tail ±1.2; ears, eyes and
/// jaw ±0.3; the root rotation is unbounded.
pub fn pose_limits(tree: &KinematicTree) -> PoseLimits {
    let n = tree.joint_count();
    let mut max = vec![0.0; 3 * n];
    for j in 0..n {
        let bound = if j == tree.root() {
            [f64::INFINITY; 3]
        } else if is_leg(j) {
            [1.5, 0.3, 0.3]
        } else if is_tail(j) {
            [1.2; 3]
        } else if [JAW, LEFT_EAR, RIGHT_EAR, LEFT_EYE, RIGHT_EYE].contains(&j) {
            [0.3; 3]
        } else {
            [0.5; 3]
        };
        max[3 * j..3 * j + 3].copy_from_slice(&bound);
    }
    PoseLimits {
        min: max.iter().map(|m| -m).collect(),
        max,
    }
}

/// Reflect a pose across the sagittal plane: part `p` takes the rotation of
/// its mirror part with the `y` and `z` axis components negated.
pub fn mirror_pose(theta: &[f64], joint_mirror: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; theta.len()];
    for (p, &m) in joint_mirror.iter().enumerate() {
        out[3 * p] = theta[3 * m];
        out[3 * p + 1] = -theta[3 * m + 1];
        out[3 * p + 2] = -theta[3 * m + 2];
    }
    out
}

/// Gaussian over `poses` and their mirror images, loaded by
/// [`POSE_PRIOR_LOADING`]. The root rotation is decoupled with variance
/// [`ROOT_POSE_VARIANCE`] and zero mean, and the mean is kept inside `limits`.
pub fn fit_pose_prior(
    poses: &[Vec<f64>],
    joint_mirror: &[usize],
    root: usize,
    limits: &PoseLimits,
) -> Result<PosePrior> {
    if poses.is_empty() {
        return Err(Error::Empty("pose set"));
    }
    let d = 3 * joint_mirror.len();
    if let Some(p) = poses.iter().find(|p| p.len() != d) {
        return Err(Error::Dimension {
            what: "pose vector",
            expected: d,
            got: p.len(),
        });
    }
    let mut all: Vec<DVector<f64>> = Vec::with_capacity(2 * poses.len());
    for p in poses {
        all.push(DVector::from_column_slice(p));
        all.push(DVector::from_vec(mirror_pose(p, joint_mirror)));
    }
    let m = all.len() as f64;
    let mut mean = all.iter().fold(DVector::zeros(d), |a, p| a + p) / m;
    let mut cov = DMatrix::zeros(d, d);
    for p in &all {
        let c = p - &mean;
        cov += &c * c.transpose();
    }
    cov /= m - 1.0;
    for i in 0..d {
        cov[(i, i)] += POSE_PRIOR_LOADING;
    }
    for c in 3 * root..3 * root + 3 {
        cov.row_mut(c).fill(0.0);
        cov.column_mut(c).fill(0.0);
        cov[(c, c)] = ROOT_POSE_VARIANCE;
        mean[c] = 0.0;
    }
    limits.clamp(mean.as_mut_slice());
    Gaussian::new(mean, cov)
}

/// Per-family Gaussians over shape coefficients.
///
/// Families with no more samples than dimensions get `λ I` added to their
/// covariance, with `λ` = [`FAMILY_LOADING_FRACTION`] times the mean of
/// `eigenvalues`, so a single sample yields mean = sample and covariance `λ I`.
pub fn fit_family_priors(
    groups: &BTreeMap<String, Vec<Vec<f64>>>,
    eigenvalues: &[f64],
) -> Result<BTreeMap<String, FamilyPrior>> {
    let d = eigenvalues.len();
    let mean_eig = eigenvalues.iter().sum::<f64>() / d.max(1) as f64;
    let lambda = (FAMILY_LOADING_FRACTION * mean_eig).max(f64::MIN_POSITIVE);
    let mut out = BTreeMap::new();
    for (name, samples) in groups {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "family `{name}` has no samples"
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.len() != d) {
            return Err(Error::Dimension {
                what: "shape coefficients",
                expected: d,
                got: s.len(),
            });
        }
        let m = samples.len();
        let vecs: Vec<DVector<f64>> = samples
            .iter()
            .map(|s| DVector::from_column_slice(s))
            .collect();
        let mean = vecs.iter().fold(DVector::zeros(d), |a, v| a + v) / m as f64;
        let mut cov = DMatrix::zeros(d, d);
        if m > 1 {
            for v in &vecs {
                let c = v - &mean;
                cov += &c * c.transpose();
            }
            cov /= (m - 1) as f64;
        }
        let loaded = |mut c: DMatrix<f64>| {
            for i in 0..d {
                c[(i, i)] += lambda;
            }
            c
        };
        let gaussian = if m <= d {
            Gaussian::new(mean, loaded(cov))?
        } else {
            match Gaussian::new(mean.clone(), cov.clone()) {
                Ok(g) => g,
                Err(_) => Gaussian::new(mean, loaded(cov))?,
            }
        };
        out.insert(
            name.clone(),
            FamilyPrior {
                gaussian,
                samples: m,
            },
        );
    }
    Ok(out)
}
