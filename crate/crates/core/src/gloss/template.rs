//! Splitting a segmented template into independent part meshes.

use std::collections::BTreeMap;

use crate::mesh::{accumulate_face_normals, centroid, Vec3};
use crate::synth::{is_tail, Template};

/// A vertex of one part mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PartVertex {
    pub part: usize,
    pub local: usize,
}

/// One part mesh in its own frame, centered on the part centroid.
#[derive(Debug, Clone)]
pub struct GlossPart {
    /// Global template index of each local vertex.
    pub global: Vec<usize>,
    /// Rest vertices relative to `centroid`.
    pub rest: Vec<Vec3>,
    pub centroid: Vec3,
    pub faces: Vec<[usize; 3]>,
}

/// Two copies of a shared template vertex that must stay together.
#[derive(Debug, Clone, Copy)]
pub struct StitchPair {
    pub a: PartVertex,
    pub b: PartVertex,
    /// Squared gap between the part normals at rest.
    pub rest_normal_gap: f64,
}

#[derive(Debug, Clone)]
pub struct GlossTemplate {
    pub parts: Vec<GlossPart>,
    pub parents: Vec<Option<usize>>,
    pub stitches: Vec<StitchPair>,
    /// Copies of every global vertex.
    pub copies: Vec<Vec<PartVertex>>,
    pub faces: Vec<[usize; 3]>,
    pub keypoints: Vec<(String, PartVertex)>,
    pub symmetry_groups: Vec<Vec<usize>>,
    pub tail_parts: Vec<usize>,
}

impl GlossTemplate {
    pub fn from_template(t: &Template) -> Self {
        let mut copies = vec![Vec::new(); t.vertex_count()];
        let parts: Vec<GlossPart> = t
            .part_vertices
            .iter()
            .enumerate()
            .map(|(p, verts)| {
                let local_of: BTreeMap<usize, usize> =
                    verts.iter().enumerate().map(|(l, &g)| (g, l)).collect();
                for (l, &g) in verts.iter().enumerate() {
                    copies[g].push(PartVertex { part: p, local: l });
                }
                let pos: Vec<Vec3> = verts.iter().map(|&g| t.mesh.vertices[g]).collect();
                let c = centroid(&pos);
                let faces = t
                    .mesh
                    .faces
                    .iter()
                    .zip(&t.face_parts)
                    .filter(|(_, &fp)| fp == p)
                    .map(|(f, _)| f.map(|g| local_of[&g]))
                    .collect();
                GlossPart {
                    global: verts.clone(),
                    rest: pos.iter().map(|v| v - c).collect(),
                    centroid: c,
                    faces,
                }
            })
            .collect();

        let normals: Vec<Vec<Vec3>> = parts
            .iter()
            .map(|p| {
                accumulate_face_normals(&p.rest, &p.faces)
                    .into_iter()
                    .map(|n| n.normalize())
                    .collect()
            })
            .collect();
        let mut stitches = Vec::new();
        for c in &copies {
            for i in 0..c.len() {
                for j in i + 1..c.len() {
                    let (a, b) = (c[i], c[j]);
                    let gap = (normals[a.part][a.local] - normals[b.part][b.local]).norm_squared();
                    stitches.push(StitchPair {
                        a,
                        b,
                        rest_normal_gap: gap,
                    });
                }
            }
        }
        let keypoints = t
            .scan_keypoints
            .iter()
            .map(|(name, g)| (name.clone(), copies[*g][0]))
            .collect();
        Self {
            parents: t.tree.parents().to_vec(),
            stitches,
            copies,
            faces: t.mesh.faces.clone(),
            keypoints,
            symmetry_groups: t.symmetry_groups.clone(),
            tail_parts: (0..parts.len()).filter(|&p| is_tail(p)).collect(),
            parts,
        }
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.copies.len()
    }

    /// Merged mesh vertices: every global vertex is the mean of its copies.
    pub fn merge(&self, part_vertices: &[Vec<Vec3>]) -> Vec<Vec3> {
        self.copies
            .iter()
            .map(|c| {
                c.iter().fold(Vec3::zeros(), |acc, pv| {
                    acc + part_vertices[pv.part][pv.local]
                }) / c.len() as f64
            })
            .collect()
    }

    /// Per-part copies of a vertex array in template order.
    pub fn split(&self, vertices: &[Vec3]) -> Vec<Vec<Vec3>> {
        self.parts
            .iter()
            .map(|p| p.global.iter().map(|&g| vertices[g]).collect())
            .collect()
    }

    pub fn keypoint(&self, name: &str) -> Option<PartVertex> {
        self.keypoints
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, pv)| *pv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_template, TemplateSpec};

    #[test]
    fn split_and_merge_round_trip() {
        let t = make_template(&TemplateSpec::with_resolution(1)).unwrap();
        let g = GlossTemplate::from_template(&t);
        let merged = g.merge(&g.split(&t.mesh.vertices));
        for (a, b) in merged.iter().zip(&t.mesh.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(g.copies.iter().all(|c| !c.is_empty() && c.len() <= 2));
        assert!(!g.stitches.is_empty());
        let faces: usize = g.parts.iter().map(|p| p.faces.len()).sum();
        assert_eq!(faces, t.mesh.faces.len());
        assert_eq!(g.tail_parts.len(), 7);
    }
}
