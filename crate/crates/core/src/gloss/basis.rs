//! Per-part shape and pose-deformation bases.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::template::GlossTemplate;
use crate::linalg::{pca_uncentered, procrustes};
use crate::mesh::skinning::{forward_kinematics, skin};
use crate::mesh::Vec3;
use crate::synth::{sample_pose, PoseRanges, Template};
use crate::{Error, Result};

/// Number of analytic shape coefficients per part.
pub const SHAPE_DIM: usize = 7;

/// Prior variances of the shape coefficients: global scale, per-axis scale,
/// per-axis stretch.
pub const SHAPE_VARIANCE: [f64; SHAPE_DIM] = [0.25, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05];

/// Shape displacement of a local rest vertex `t` for coefficients `s`.
///
/// Columns: uniform scale, scale along x, y, z, then stretches. Stretch along
/// an axis scales the two orthogonal coordinates in proportion to the
/// coordinate along it.
pub fn shape_displacement(t: &Vec3, s: &[f64]) -> Vec3 {
    let (x, y, z) = (t.x, t.y, t.z);
    Vec3::new(
        s[0] * x + s[1] * x + s[5] * y * x + s[6] * z * x,
        s[0] * y + s[2] * y + s[4] * x * y + s[6] * z * y,
        s[0] * z + s[3] * z + s[4] * x * z + s[5] * y * z,
    )
}

/// Transpose of [`shape_displacement`]: accumulates `d/ds` of `g . B_s(t) s`.
pub fn shape_displacement_adjoint(t: &Vec3, g: &Vec3, out: &mut [f64]) {
    let (x, y, z) = (t.x, t.y, t.z);
    out[0] += g.x * x + g.y * y + g.z * z;
    out[1] += g.x * x;
    out[2] += g.y * y;
    out[3] += g.z * z;
    out[4] += x * (g.y * y + g.z * z);
    out[5] += y * (g.x * x + g.z * z);
    out[6] += z * (g.x * x + g.y * y);
}

/// Linear pose-dependent deformation of one part: `m + B d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseBasis {
    /// Mean displacement, `3n` entries.
    pub mean: DVector<f64>,
    /// Orthonormal columns, `3n x n_d`.
    pub basis: DMatrix<f64>,
    pub variances: Vec<f64>,
}

impl PoseBasis {
    pub fn empty(n: usize) -> Self {
        Self {
            mean: DVector::zeros(3 * n),
            basis: DMatrix::zeros(3 * n, 0),
            variances: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// PCA of per-frame displacements `frame - rest` about the rest shape, keeping
/// the smallest number of components reaching `variance_fraction` of the
/// total, at most `max_components`. The mean displacement is zero, so the
/// rest shape is reproduced exactly with no deformation.
pub fn build_pose_basis(
    rest: &[Vec3],
    frames: &[Vec<Vec3>],
    variance_fraction: f64,
    max_components: usize,
) -> Result<PoseBasis> {
    let n = rest.len();
    if frames.len() < 2 || frames.len() < max_components {
        return Err(Error::InvalidArgument(format!(
            "{} animation frames for up to {max_components} pose components",
            frames.len()
        )));
    }
    let mut samples = DMatrix::zeros(frames.len(), 3 * n);
    for (f, frame) in frames.iter().enumerate() {
        if frame.len() != n {
            return Err(Error::Dimension {
                what: "animation frame",
                expected: n,
                got: frame.len(),
            });
        }
        for (i, (p, r)) in frame.iter().zip(rest).enumerate() {
            let d = p - r;
            for c in 0..3 {
                samples[(f, 3 * i + c)] = d[c];
            }
        }
    }
    let cap = max_components.min(frames.len()).min(3 * n);
    let full = pca_uncentered(&samples, cap)?;
    let total: f64 = full.eigenvalues.iter().sum();
    let mut keep = 0;
    if total > 0.0 {
        let mut acc = 0.0;
        for &v in &full.eigenvalues {
            if acc >= variance_fraction * total {
                break;
            }
            acc += v;
            keep += 1;
        }
    }
    Ok(PoseBasis {
        mean: full.mean,
        basis: full.components.columns(0, keep).into_owned(),
        variances: full.eigenvalues[..keep].to_vec(),
    })
}

/// Animation settings used to learn pose deformations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseBasisConfig {
    pub frames: usize,
    pub seed: u64,
    pub variance_fraction: f64,
    pub max_components: usize,
    pub ranges: PoseRanges,
}

impl Default for PoseBasisConfig {
    fn default() -> Self {
        Self {
            frames: 40,
            seed: 7,
            variance_fraction: 0.9,
            max_components: 5,
            ranges: PoseRanges::default(),
        }
    }
}

/// Pose bases for every part plus tail rotation variances, learned from
/// skinned animation frames of the template.
pub fn learn_pose_bases(
    template: &Template,
    gloss: &GlossTemplate,
    config: &PoseBasisConfig,
) -> Result<(Vec<PoseBasis>, Vec<Vec3>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let joints = template.joints_for(&template.mesh.vertices);
    let mut per_part: Vec<Vec<Vec<Vec3>>> =
        vec![Vec::with_capacity(config.frames); gloss.part_count()];
    let mut tail_sq = vec![Vec3::zeros(); gloss.part_count()];
    for _ in 0..config.frames {
        let theta = sample_pose(&mut rng, &config.ranges);
        let fk = forward_kinematics(&template.tree, &joints, &theta);
        let posed = skin(
            &template.weights,
            &template.mesh.vertices,
            &joints,
            &fk,
            &Vec3::zeros(),
        );
        for (p, part) in gloss.parts.iter().enumerate() {
            let pts: Vec<Vec3> = part.global.iter().map(|&g| posed[g]).collect();
            let (r, t) = procrustes(&pts, &part.rest);
            per_part[p].push(pts.iter().map(|x| r * x + t).collect());
            let th = Vec3::new(theta[3 * p], theta[3 * p + 1], theta[3 * p + 2]);
            tail_sq[p] += th.component_mul(&th);
        }
    }
    let bases = gloss
        .parts
        .iter()
        .zip(&per_part)
        .map(|(part, frames)| {
            build_pose_basis(
                &part.rest,
                frames,
                config.variance_fraction,
                config.max_components,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let n = config.frames.max(1) as f64;
    let tail_variance = tail_sq
        .iter()
        .map(|s| (s / n).map(|v| v.max(1e-3)))
        .collect();
    Ok((bases, tail_variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::rodrigues_to_matrix;

    #[test]
    fn shape_columns_act_as_documented() {
        let t = Vec3::new(1.0, 2.0, 3.0);
        let mut s = [0.0; SHAPE_DIM];
        s[4] = 0.5;
        // Stretch along x: (x, y, z) -> (x, y + c x y, z + c x z).
        assert_eq!(shape_displacement(&t, &s), Vec3::new(0.0, 1.0, 1.5));
        s = [0.0; SHAPE_DIM];
        s[0] = 0.1;
        assert!((shape_displacement(&t, &s) - t * 0.1).norm() < 1e-15);
    }

    #[test]
    fn adjoint_matches_forward() {
        let t = Vec3::new(0.3, -0.7, 1.1);
        let g = Vec3::new(-0.2, 0.5, 0.9);
        let mut adj = [0.0; SHAPE_DIM];
        shape_displacement_adjoint(&t, &g, &mut adj);
        for k in 0..SHAPE_DIM {
            let mut e = [0.0; SHAPE_DIM];
            e[k] = 1.0;
            assert!((g.dot(&shape_displacement(&t, &e)) - adj[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn two_opposite_frames_give_one_component() {
        let rest = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let delta = [
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.0, 0.2, 0.0),
            Vec3::zeros(),
        ];
        let plus: Vec<Vec3> = rest.iter().zip(&delta).map(|(r, d)| r + d).collect();
        let minus: Vec<Vec3> = rest.iter().zip(&delta).map(|(r, d)| r - d).collect();
        let b = build_pose_basis(&rest, &[plus, minus], 0.9, 1).unwrap();
        assert_eq!(b.dim(), 1);
        assert!(b.mean.norm() < 1e-15);
        let dir = DVector::from_iterator(9, delta.iter().flat_map(|d| [d.x, d.y, d.z]));
        let cos = b.basis.column(0).dot(&dir) / dir.norm();
        assert!((cos.abs() - 1.0).abs() < 1e-12);
        assert!(build_pose_basis(&rest, std::slice::from_ref(&rest), 0.9, 1).is_err());
    }

    #[test]
    fn bend_basis_generalizes_to_held_out_frame() {
        // Capsule-like tube bending about x around its middle.
        let mut rest = Vec::new();
        for i in 0..21 {
            let z = -1.0 + 0.1 * i as f64;
            for k in 0..8 {
                let a = std::f64::consts::TAU * k as f64 / 8.0;
                rest.push(Vec3::new(0.2 * a.cos(), 0.2 * a.sin(), z));
            }
        }
        let bend = |angle: f64| -> Vec<Vec3> {
            let r = rodrigues_to_matrix(&Vec3::new(angle, 0.0, 0.0));
            let posed: Vec<Vec3> = rest
                .iter()
                .map(|p| {
                    let w = 1.0 / (1.0 + (-8.0 * p.z).exp());
                    p * (1.0 - w) + r * p * w
                })
                .collect();
            let (rot, t) = procrustes(&posed, &rest);
            posed.iter().map(|x| rot * x + t).collect()
        };
        let frames: Vec<Vec<Vec3>> = (0..20)
            .map(|i| bend(-0.3 + 0.6 * i as f64 / 19.0))
            .collect();
        let b = build_pose_basis(&rest, &frames, 0.9, 5).unwrap();
        assert!(b.dim() >= 1 && b.dim() <= 5);
        let held = bend(0.17);
        let x = DVector::from_iterator(
            rest.len() * 3,
            held.iter().zip(&rest).flat_map(|(h, r)| {
                let d = h - r;
                [d.x, d.y, d.z]
            }),
        );
        let centered = &x - &b.mean;
        let residual = &centered - &b.basis * (b.basis.transpose() * &centered);
        assert!(
            residual.norm() < 0.1 * x.norm(),
            "{} vs {}",
            residual.norm(),
            x.norm()
        );
    }
}
