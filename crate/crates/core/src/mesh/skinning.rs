//! Part labels, skinning weights, kinematic trees and linear blend skinning.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::{contract, rodrigues_with_jacobian};
use super::{Mesh, Vec3};
use crate::{Error, Result};

/// Per-vertex part index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartLabeling {
    pub part_of_vertex: Vec<usize>,
    pub part_count: usize,
}

impl PartLabeling {
    pub fn new(part_of_vertex: Vec<usize>, part_count: usize) -> Result<Self> {
        let mut counts = vec![0usize; part_count];
        for &p in &part_of_vertex {
            if p >= part_count {
                return Err(Error::InvalidArgument(format!(
                    "part label {p} out of range 0..{part_count}"
                )));
            }
            counts[p] += 1;
        }
        Ok(Self {
            part_of_vertex,
            part_count,
        })
    }

    pub fn vertices_of(&self, part: usize) -> Vec<usize> {
        (0..self.part_of_vertex.len())
            .filter(|&v| self.part_of_vertex[v] == part)
            .collect()
    }
}

/// Sparse skinning weights, one row of `(joint, weight)` pairs per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkinningWeights {
    rows: Vec<Vec<(usize, f64)>>,
}

pub const MAX_INFLUENCES: usize = 4;

impl SkinningWeights {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, joint_count: usize) -> Result<Self> {
        for (v, row) in rows.iter().enumerate() {
            if row.len() > MAX_INFLUENCES {
                return Err(Error::InvalidArgument(format!(
                    "vertex {v} has {} influences (max {MAX_INFLUENCES})",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for &(j, w) in row {
                if j >= joint_count || !(w >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "vertex {v} has invalid influence ({j}, {w})"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "weights of vertex {v} sum to {sum}"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn row(&self, v: usize) -> &[(usize, f64)] {
        &self.rows[v]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }
}

/// Joint hierarchy with neutral-pose joint locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr", into = "TreeRepr")]
pub struct KinematicTree {
    parent: Vec<Option<usize>>,
    pub joint_positions: Vec<Vec3>,
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    parent: Vec<i64>,
    joint_positions: Vec<Vec3>,
}

impl TryFrom<TreeRepr> for KinematicTree {
    type Error = Error;
    fn try_from(r: TreeRepr) -> Result<Self> {
        let parent = r
            .parent
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        KinematicTree::new(parent, r.joint_positions)
    }
}

impl From<KinematicTree> for TreeRepr {
    fn from(t: KinematicTree) -> Self {
        TreeRepr {
            parent: t
                .parent
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            joint_positions: t.joint_positions,
        }
    }
}

impl KinematicTree {
    pub fn new(parent: Vec<Option<usize>>, joint_positions: Vec<Vec3>) -> Result<Self> {
        let n = parent.len();
        if joint_positions.len() != n {
            return Err(Error::Dimension {
                what: "joint positions",
                expected: n,
                got: joint_positions.len(),
            });
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "kinematic tree needs exactly one root, found {}",
                roots.len()
            )));
        }
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::InvalidArgument(format!(
                        "joint {i} has parent {p} out of range"
                    )));
                }
                children[p].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([roots[0]]);
        while let Some(j) = queue.pop_front() {
            order.push(j);
            queue.extend(children[j].iter().copied());
        }
        if order.len() != n {
            return Err(Error::InvalidArgument(
                "kinematic tree contains a cycle".into(),
            ));
        }
        Ok(Self {
            parent,
            joint_positions,
            order,
        })
    }

    /// BFS tree over an undirected adjacency, children visited in index order.
    pub fn from_adjacency(
        adjacency: &[Vec<usize>],
        root: usize,
        joint_positions: Vec<Vec3>,
    ) -> Result<Self> {
        let n = adjacency.len();
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(j) = queue.pop_front() {
            let mut next = adjacency[j].clone();
            next.sort_unstable();
            for k in next {
                if !seen[k] {
                    seen[k] = true;
                    parent[k] = Some(j);
                    queue.push_back(k);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "part adjacency graph is disconnected".into(),
            ));
        }
        Self::new(parent, joint_positions)
    }

    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    /// Parents always precede their children.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn with_joints(&self, joint_positions: Vec<Vec3>) -> Self {
        assert_eq!(joint_positions.len(), self.parent.len());
        Self {
            parent: self.parent.clone(),
            joint_positions,
            order: self.order.clone(),
        }
    }

    /// Tree edges as `(parent, child)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.order[1..]
            .iter()
            .map(|&c| (self.parent[c].unwrap(), c))
            .collect()
    }
}

/// The JSON rig document: labels, weights and tree in one file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigDocument {
    pub part_of_vertex: Vec<usize>,
    pub weights: SkinningWeights,
    pub parent: Vec<i64>,
    pub joint_positions: Vec<Vec3>,
}

impl RigDocument {
    pub fn new(labels: &PartLabeling, weights: &SkinningWeights, tree: &KinematicTree) -> Self {
        let repr = TreeRepr::from(tree.clone());
        Self {
            part_of_vertex: labels.part_of_vertex.clone(),
            weights: weights.clone(),
            parent: repr.parent,
            joint_positions: repr.joint_positions,
        }
    }

    pub fn into_parts(self) -> Result<(PartLabeling, SkinningWeights, KinematicTree)> {
        let tree = KinematicTree::try_from(TreeRepr {
            parent: self.parent,
            joint_positions: self.joint_positions,
        })?;
        let n = tree.joint_count();
        let labels = PartLabeling::new(self.part_of_vertex, n)?;
        let weights = SkinningWeights::new(self.weights.rows, n)?;
        Ok((labels, weights, tree))
    }
}

/// World transforms of every joint for one pose.
///
/// Joint `k` maps a neutral point `x` to `rot[k] * (x - j_k) + trans[k]`.
#[derive(Debug, Clone)]
pub struct PoseTransforms {
    pub rot: Vec<Matrix3<f64>>,
    pub trans: Vec<Vec3>,
    local: Vec<Matrix3<f64>>,
    jacobian: Vec<[Matrix3<f64>; 3]>,
}

pub fn forward_kinematics(tree: &KinematicTree, joints: &[Vec3], theta: &[f64]) -> PoseTransforms {
    let n = tree.joint_count();
    let mut local = vec![Matrix3::identity(); n];
    let mut jacobian = vec![[Matrix3::zeros(); 3]; n];
    for j in 0..n {
        let r = Vector3::new(theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]);
        let (m, jac) = rodrigues_with_jacobian(&r);
        local[j] = m;
        jacobian[j] = jac;
    }
    let mut rot = vec![Matrix3::identity(); n];
    let mut trans = vec![Vec3::zeros(); n];
    for &j in tree.order() {
        match tree.parent(j) {
            None => {
                rot[j] = local[j];
                trans[j] = joints[j];
            }
            Some(p) => {
                rot[j] = rot[p] * local[j];
                trans[j] = rot[p] * (joints[j] - joints[p]) + trans[p];
            }
        }
    }
    PoseTransforms {
        rot,
        trans,
        local,
        jacobian,
    }
}

/// Per-vertex blended affine map `y = A x + b`.
pub fn blended_transforms(
    weights: &SkinningWeights,
    joints: &[Vec3],
    pose: &PoseTransforms,
    gamma: &Vec3,
) -> Vec<(Matrix3<f64>, Vec3)> {
    weights
        .rows()
        .iter()
        .map(|row| {
            let mut a = Matrix3::zeros();
            let mut b = *gamma;
            for &(k, w) in row {
                a += pose.rot[k] * w;
                b += (pose.trans[k] - pose.rot[k] * joints[k]) * w;
            }
            (a, b)
        })
        .collect()
}

pub fn skin(
    weights: &SkinningWeights,
    rest: &[Vec3],
    joints: &[Vec3],
    pose: &PoseTransforms,
    gamma: &Vec3,
) -> Vec<Vec3> {
    rest.iter()
        .zip(weights.rows())
        .map(|(x, row)| {
            let mut y = *gamma;
            for &(k, w) in row {
                y += (pose.rot[k] * (x - joints[k]) + pose.trans[k]) * w;
            }
            y
        })
        .collect()
}

/// Gradients of a scalar through [`skin`] and [`forward_kinematics`].
#[derive(Debug, Clone)]
pub struct SkinGradient {
    pub rest: Vec<Vec3>,
    pub joints: Vec<Vec3>,
    pub theta: Vec<f64>,
    pub gamma: Vec3,
}

pub fn skin_backward(
    tree: &KinematicTree,
    weights: &SkinningWeights,
    rest: &[Vec3],
    joints: &[Vec3],
    pose: &PoseTransforms,
    grad_out: &[Vec3],
) -> SkinGradient {
    let n = tree.joint_count();
    let mut grad_rest = Vec::with_capacity(rest.len());
    let mut gamma = Vec3::zeros();
    let mut sum_g = vec![Vec3::zeros(); n];
    let mut sum_gx = vec![Matrix3::zeros(); n];
    for ((x, row), g) in rest.iter().zip(weights.rows()).zip(grad_out) {
        gamma += g;
        let mut a = Matrix3::zeros();
        for &(k, w) in row {
            let wg = g * w;
            sum_g[k] += wg;
            sum_gx[k] += wg * x.transpose();
            a += pose.rot[k] * w;
        }
        grad_rest.push(a.transpose() * g);
    }
    let mut d_rot: Vec<Matrix3<f64>> = (0..n)
        .map(|k| sum_gx[k] - sum_g[k] * joints[k].transpose())
        .collect();
    let mut d_trans = sum_g.clone();
    let mut d_joints: Vec<Vec3> = (0..n)
        .map(|k| -(pose.rot[k].transpose() * sum_g[k]))
        .collect();
    let mut theta = vec![0.0; 3 * n];
    for &j in tree.order().iter().rev() {
        let d_local = match tree.parent(j) {
            None => {
                d_joints[j] += d_trans[j];
                d_rot[j]
            }
            Some(p) => {
                let dt = d_trans[j];
                let rp = pose.rot[p];
                let contrib_rot =
                    d_rot[j] * pose.local[j].transpose() + dt * (joints[j] - joints[p]).transpose();
                d_rot[p] += contrib_rot;
                let back = rp.transpose() * dt;
                d_joints[j] += back;
                d_joints[p] -= back;
                d_trans[p] += dt;
                rp.transpose() * d_rot[j]
            }
        };
        let dr = contract(&pose.jacobian[j], &d_local);
        theta[3 * j..3 * j + 3].copy_from_slice(dr.as_slice());
    }
    SkinGradient {
        rest: grad_rest,
        joints: d_joints,
        theta,
        gamma,
    }
}

/// Pose `template` with relative joint rotations `theta` (3 per joint) and
/// root translation `gamma`.
pub fn lbs_pose(
    template: &Mesh,
    tree: &KinematicTree,
    weights: &SkinningWeights,
    theta: &[f64],
    gamma: &Vec3,
) -> Result<Mesh> {
    let n = tree.joint_count();
    if theta.len() != 3 * n {
        return Err(Error::Dimension {
            what: "pose vector",
            expected: 3 * n,
            got: theta.len(),
        });
    }
    if weights.len() != template.vertex_count() {
        return Err(Error::Dimension {
            what: "skinning weight rows",
            expected: template.vertex_count(),
            got: weights.len(),
        });
    }
    let pose = forward_kinematics(tree, &tree.joint_positions, theta);
    Ok(template.with_vertices(skin(
        weights,
        &template.vertices,
        &tree.joint_positions,
        &pose,
        gamma,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three-joint chain along +x with blended vertices between the joints.
    pub(crate) fn chain() -> (Mesh, KinematicTree, SkinningWeights) {
        let mut v = Vec::new();
        let mut rows = Vec::new();
        for i in 0..12 {
            let x = i as f64 * 0.25;
            for (y, z) in [(0.2, 0.0), (-0.1, 0.17), (-0.1, -0.17)] {
                v.push(Vec3::new(x, y, z));
                let t = x / 1.0;
                let row = if t < 0.8 {
                    vec![(0, 1.0)]
                } else if t < 1.2 {
                    let a = (t - 0.8) / 0.4;
                    vec![(0, 1.0 - a), (1, a)]
                } else if t < 1.8 {
                    vec![(1, 1.0)]
                } else if t < 2.2 {
                    let a = (t - 1.8) / 0.4;
                    vec![(1, 1.0 - a), (2, a)]
                } else {
                    vec![(2, 1.0)]
                };
                rows.push(row);
            }
        }
        let mut faces = Vec::new();
        for i in 0..11 {
            for k in 0..3 {
                let a = 3 * i + k;
                let b = 3 * i + (k + 1) % 3;
                faces.push([a, b, b + 3]);
                faces.push([a, b + 3, a + 3]);
            }
        }
        let mesh = Mesh::new(v, faces).unwrap();
        let tree = KinematicTree::new(
            vec![None, Some(0), Some(1)],
            vec![
                Vec3::new(0.2, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
        )
        .unwrap();
        let weights = SkinningWeights::new(rows, 3).unwrap();
        (mesh, tree, weights)
    }

    #[test]
    fn neutral_pose_is_identity() {
        let (mesh, tree, weights) = chain();
        let posed = lbs_pose(&mesh, &tree, &weights, &[0.0; 9], &Vec3::zeros()).unwrap();
        assert_eq!(posed.vertices, mesh.vertices);
    }

    #[test]
    fn pure_translation() {
        let (mesh, tree, weights) = chain();
        let t = Vec3::new(1.0, 2.0, 3.0);
        let posed = lbs_pose(&mesh, &tree, &weights, &[0.0; 9], &t).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&posed.vertices) {
            assert_relative_eq!(a + t, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_part_half_turn_about_root() {
        let mesh = Mesh::new(
            vec![
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.5),
                Vec3::new(2.0, 1.0, -1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let joint = Vec3::new(0.5, 0.5, 0.0);
        let tree = KinematicTree::new(vec![None], vec![joint]).unwrap();
        let weights = SkinningWeights::new(vec![vec![(0, 1.0)]; 3], 1).unwrap();
        let posed = lbs_pose(
            &mesh,
            &tree,
            &weights,
            &[0.0, 0.0, std::f64::consts::PI],
            &Vec3::zeros(),
        )
        .unwrap();
        for (x, y) in mesh.vertices.iter().zip(&posed.vertices) {
            let d = x - joint;
            let expected = joint + Vec3::new(-d.x, -d.y, d.z);
            assert_relative_eq!(*y, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (mesh, tree, weights) = chain();
        assert!(matches!(
            lbs_pose(&mesh, &tree, &weights, &[0.0; 6], &Vec3::zeros()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rigid_equivariance() {
        let (mesh, tree, weights) = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta: Vec<f64> = (0..9).map(|_| rng.random_range(-0.5..0.5)).collect();
        let gamma = Vec3::new(0.3, -0.2, 0.1);
        let base = lbs_pose(&mesh, &tree, &weights, &theta, &gamma).unwrap();
        // Pre-compose a rigid motion (q, t) into the root: R0' = Q R0, gamma' = Q(j0 + gamma) + t - j0.
        let q = super::super::rotation::rodrigues_to_matrix(&Vec3::new(0.4, 1.1, -0.3));
        let t = Vec3::new(2.0, 0.5, -1.0);
        let r0 = q * super::super::rotation::rodrigues_to_matrix(&Vec3::new(
            theta[0], theta[1], theta[2],
        ));
        let r0v = super::super::rotation::matrix_to_rodrigues(&r0);
        let mut theta2 = theta.clone();
        theta2[..3].copy_from_slice(r0v.as_slice());
        let j0 = tree.joint_positions[0];
        let gamma2 = q * (j0 + gamma) + t - j0;
        let moved = lbs_pose(&mesh, &tree, &weights, &theta2, &gamma2).unwrap();
        for (a, b) in base.vertices.iter().zip(&moved.vertices) {
            assert_relative_eq!(q * a + t, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mesh, tree, weights) = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta: Vec<f64> = (0..9).map(|_| rng.random_range(-0.6..0.6)).collect();
        let gamma = Vec3::new(0.1, 0.2, -0.3);
        let upstream: Vec<Vec3> = (0..mesh.vertex_count())
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let joints = tree.joint_positions.clone();
        let eval = |rest: &[Vec3], joints: &[Vec3], theta: &[f64], gamma: &Vec3| -> f64 {
            let pose = forward_kinematics(&tree, joints, theta);
            skin(&weights, rest, joints, &pose, gamma)
                .iter()
                .zip(&upstream)
                .map(|(y, g)| y.dot(g))
                .sum()
        };
        let pose = forward_kinematics(&tree, &joints, &theta);
        let grad = skin_backward(&tree, &weights, &mesh.vertices, &joints, &pose, &upstream);
        let eps = 1e-6;
        for i in 0..9 {
            let mut tp = theta.clone();
            tp[i] += eps;
            let mut tm = theta.clone();
            tm[i] -= eps;
            let fd = (eval(&mesh.vertices, &joints, &tp, &gamma)
                - eval(&mesh.vertices, &joints, &tm, &gamma))
                / (2.0 * eps);
            assert!(
                (fd - grad.theta[i]).abs() < 1e-6,
                "theta[{i}]: {fd} vs {}",
                grad.theta[i]
            );
        }
        for j in 0..3 {
            for a in 0..3 {
                let mut jp = joints.clone();
                jp[j][a] += eps;
                let mut jm = joints.clone();
                jm[j][a] -= eps;
                let fd = (eval(&mesh.vertices, &jp, &theta, &gamma)
                    - eval(&mesh.vertices, &jm, &theta, &gamma))
                    / (2.0 * eps);
                assert!(
                    (fd - grad.joints[j][a]).abs() < 1e-6,
                    "joint {j}.{a}: {fd} vs {}",
                    grad.joints[j][a]
                );
            }
        }
        for v in [0, 14, 30] {
            for a in 0..3 {
                let mut rp = mesh.vertices.clone();
                rp[v][a] += eps;
                let mut rm = mesh.vertices.clone();
                rm[v][a] -= eps;
                let fd = (eval(&rp, &joints, &theta, &gamma) - eval(&rm, &joints, &theta, &gamma))
                    / (2.0 * eps);
                assert!((fd - grad.rest[v][a]).abs() < 1e-6);
            }
        }
        let total: Vec3 = upstream.iter().sum();
        assert_relative_eq!(grad.gamma, total, epsilon = 1e-12);
    }

    #[test]
    fn tree_validation() {
        assert!(KinematicTree::new(vec![None, None], vec![Vec3::zeros(); 2]).is_err());
        assert!(KinematicTree::new(vec![Some(1), Some(0), None], vec![Vec3::zeros(); 3]).is_err());
        let adj = vec![vec![1, 2], vec![0], vec![0, 3], vec![2]];
        let tree = KinematicTree::from_adjacency(&adj, 2, vec![Vec3::zeros(); 4]).unwrap();
        assert_eq!(tree.parents(), &[Some(2), Some(0), None, Some(2)]);
        let json = serde_json::to_string(&tree).unwrap();
        assert!(json.contains("-1"));
        let back: KinematicTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn weights_validation() {
        assert!(SkinningWeights::new(vec![vec![(0, 0.5), (1, 0.4)]], 2).is_err());
        assert!(SkinningWeights::new(vec![vec![(0, 0.2); 5]], 1).is_err());
        assert!(SkinningWeights::new(vec![vec![(3, 1.0)]], 2).is_err());
    }
}
