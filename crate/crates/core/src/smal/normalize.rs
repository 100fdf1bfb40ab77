//! Unposing registrations and left/right averaging.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::Rig;
use crate::mesh::skinning::{blended_transforms, forward_kinematics};
use crate::mesh::{mirror_sagittal, Mesh, Vec3};
use crate::{Error, Result};

/// Invert linear blend skinning: find neutral vertices `x` such that
/// `rig.pose(x, theta, gamma)` reproduces `posed`.
///
/// Each vertex is `y_i = A_i x_i + b_i(J) + γ` with `A_i` fixed by `theta`
/// and `b_i` linear in the joints `J`, which are themselves averages of the
/// unknown neutral vertices. Substituting `x_i = A_i⁻¹(y_i - γ - b_i(J))` into
/// the joint rule gives a small `3N x 3N` system for `J`, after which every
/// vertex follows in closed form.
pub fn pose_normalize(rig: &Rig, posed: &[Vec3], theta: &[f64], gamma: &Vec3) -> Result<Vec<Vec3>> {
    rig.check_pose(theta)?;
    if posed.len() != rig.vertex_count() {
        return Err(Error::Dimension {
            what: "registration vertex count",
            expected: rig.vertex_count(),
            got: posed.len(),
        });
    }
    let n = rig.joint_count();
    let zero_joints = vec![Vec3::zeros(); n];
    let fk = forward_kinematics(&rig.tree, &zero_joints, theta);
    let blends = blended_transforms(&rig.blend_weights, &zero_joints, &fk, &Vec3::zeros());
    let mut inverses = Vec::with_capacity(blends.len());
    for (i, (a, _)) in blends.iter().enumerate() {
        let scale = a.norm().max(1.0);
        let inv = if a.determinant().abs() > 1e-10 * scale * scale * scale {
            a.try_inverse()
        } else {
            None
        };
        inverses.push(inv.ok_or(Error::SingularTransform(i))?);
    }

    // Offsets b_i(J) for given joints; rotations do not depend on J.
    let offsets = |joints: &[Vec3]| -> Vec<Vec3> {
        let fk = forward_kinematics(&rig.tree, joints, theta);
        blended_transforms(&rig.blend_weights, joints, &fk, &Vec3::zeros())
            .into_iter()
            .map(|(_, b)| b)
            .collect()
    };
    let regress_unposed = |v: &[Vec3], inv: &[Matrix3<f64>]| -> Vec<Vec3> {
        let unposed: Vec<Vec3> = v.iter().zip(inv).map(|(p, a)| a * p).collect();
        rig.joints(&unposed)
    };

    let mut system = DMatrix::<f64>::identity(3 * n, 3 * n);
    let mut unit = vec![Vec3::zeros(); n];
    for col in 0..3 * n {
        unit[col / 3][col % 3] = 1.0;
        let f = regress_unposed(&offsets(&unit), &inverses);
        for (k, fk) in f.iter().enumerate() {
            for c in 0..3 {
                system[(3 * k + c, col)] += fk[c];
            }
        }
        unit[col / 3][col % 3] = 0.0;
    }
    let shifted: Vec<Vec3> = posed.iter().map(|y| y - gamma).collect();
    let rhs = regress_unposed(&shifted, &inverses);
    let rhs = DVector::from_iterator(3 * n, rhs.iter().flat_map(|j| [j.x, j.y, j.z]));
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("joint system for pose normalization is singular".into()))?;
    let joints: Vec<Vec3> = (0..n)
        .map(|k| Vec3::new(solution[3 * k], solution[3 * k + 1], solution[3 * k + 2]))
        .collect();
    let b = offsets(&joints);
    Ok(shifted
        .iter()
        .zip(&b)
        .zip(&inverses)
        .map(|((y, b), inv)| inv * (y - b))
        .collect())
}

/// Average a mesh with its sagittal mirror image; the result is exactly
/// mirror-symmetric and a fixed point of this map.
pub fn symmetrize(mesh: &Mesh, pairing: &[usize]) -> Result<Mesh> {
    let mirrored = mirror_sagittal(mesh, pairing)?;
    let vertices = mesh
        .vertices
        .iter()
        .zip(&mirrored.vertices)
        .map(|(a, b)| (a + b) * 0.5)
        .collect();
    Ok(mesh.with_vertices(vertices))
}
