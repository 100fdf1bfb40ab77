//! Triangle meshes and the rig attached to them.

mod intersect;
mod obj;
pub mod rotation;
pub mod skinning;
pub mod spatial;

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use intersect::self_intersections;
pub use obj::{format_obj, parse_obj, read_obj, write_obj};
pub use rotation::{rodrigues_to_matrix, RodriguesVector};
pub use skinning::{lbs_pose, KinematicTree, PartLabeling, RigDocument, SkinningWeights};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Validates face indices and rejects degenerate faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references a vertex outside 0..{n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} is degenerate: {f:?}"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Same faces, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            faces: self.faces.clone(),
        }
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounding_box(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn translated(&self, t: &Vec3) -> Self {
        self.with_vertices(self.vertices.iter().map(|v| v + t).collect())
    }

    /// Sorted 1-ring of every vertex.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Vertices lying on an edge used by exactly one face.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut count = std::collections::BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        let mut out = vec![false; self.vertices.len()];
        for ((a, b), c) in count {
            if c == 1 {
                out[a] = true;
                out[b] = true;
            }
        }
        out
    }

    /// Signed enclosed volume; positive for a closed, outward-oriented mesh.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (
                    self.vertices[f[0]],
                    self.vertices[f[1]],
                    self.vertices[f[2]],
                );
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (a, b, c) = (
                    self.vertices[f[0]],
                    self.vertices[f[1]],
                    self.vertices[f[2]],
                );
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }
}

pub fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Component-wise median.
pub fn median_point(points: &[Vec3]) -> Vec3 {
    let mut out = Vec3::zeros();
    for axis in 0..3 {
        let mut xs: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        out[axis] = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            xs[n / 2]
        } else {
            0.5 * (xs[n / 2 - 1] + xs[n / 2])
        };
    }
    out
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len().max(1) as f64
}

/// Unnormalized area-weighted normal accumulation: `Σ (b - a) × (c - a)`.
pub fn accumulate_face_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i] += n;
        }
    }
    acc
}

/// Area-weighted unit vertex normals.
pub fn vertex_normals(mesh: &Mesh) -> Result<Vec<Vec3>> {
    let acc = accumulate_face_normals(&mesh.vertices, &mesh.faces);
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len == 0.0 {
                Err(Error::IsolatedVertex(i))
            } else {
                Ok(n / len)
            }
        })
        .collect()
}

/// Uniform-weight Laplacian smoothing. Boundary vertices stay fixed.
pub fn laplacian_smooth(mesh: &Mesh, iterations: usize, step: f64) -> Result<Mesh> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing step must lie in (0, 1), got {step}"
        )));
    }
    if iterations == 0 {
        return Ok(mesh.clone());
    }
    let rings = mesh.neighbors();
    let boundary = mesh.boundary_vertices();
    let mut current = mesh.vertices.clone();
    for _ in 0..iterations {
        let next = current
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if boundary[i] || rings[i].is_empty() {
                    return *v;
                }
                let mean = rings[i].iter().fold(Vec3::zeros(), |a, &j| a + current[j])
                    / rings[i].len() as f64;
                v + (mean - v) * step
            })
            .collect();
        current = next;
    }
    Ok(mesh.with_vertices(current))
}

pub fn reflect_x(v: &Vec3) -> Vec3 {
    Vec3::new(-v.x, v.y, v.z)
}

/// Checks that `pairing` is an involution over `0..n`.
pub fn validate_pairing(pairing: &[usize], n: usize) -> Result<()> {
    if pairing.len() != n {
        return Err(Error::Dimension {
            what: "left/right pairing",
            expected: n,
            got: pairing.len(),
        });
    }
    for (i, &j) in pairing.iter().enumerate() {
        if j >= n || pairing[j] != i {
            return Err(Error::InvalidArgument(format!(
                "pairing is not an involution at vertex {i}"
            )));
        }
    }
    Ok(())
}

/// Reflect across the sagittal plane `x = 0` and swap left/right vertex identities.
pub fn mirror_sagittal(mesh: &Mesh, pairing: &[usize]) -> Result<Mesh> {
    validate_pairing(pairing, mesh.vertex_count())?;
    let vertices = pairing
        .iter()
        .map(|&j| reflect_x(&mesh.vertices[j]))
        .collect();
    Ok(mesh.with_vertices(vertices))
}

/// Pairs each vertex with the vertex at its mirror position, within `tol`.
pub fn sagittal_pairing(vertices: &[Vec3], tol: f64) -> Result<Vec<usize>> {
    let index = spatial::PointIndex::new(vertices);
    let mut out = Vec::with_capacity(vertices.len());
    for (i, v) in vertices.iter().enumerate() {
        let (j, d2) = index.nearest(&reflect_x(v));
        if d2.sqrt() > tol {
            return Err(Error::InvalidMesh(format!(
                "vertex {i} has no mirror counterpart (closest is {:.3e} away)",
                d2.sqrt()
            )));
        }
        out.push(j);
    }
    validate_pairing(&out, vertices.len())?;
    Ok(out)
}
