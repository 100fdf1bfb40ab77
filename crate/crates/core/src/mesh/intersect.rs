//! Self-intersection test for triangle meshes.

use super::{Mesh, Vec3};

fn segment_hits_triangle(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let dir = q - p;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if det.abs() <= 1e-12 * scale {
        return false;
    }
    let inv = 1.0 / det;
    let s = p - a;
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = s.cross(&e1);
    let v = inv * dir.dot(&qv);
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let t = inv * e2.dot(&qv);
    (0.0..=1.0).contains(&t)
}

fn triangles_intersect(t: [&Vec3; 3], s: [&Vec3; 3]) -> bool {
    (0..3).any(|k| segment_hits_triangle(t[k], t[(k + 1) % 3], s[0], s[1], s[2]))
        || (0..3).any(|k| segment_hits_triangle(s[k], s[(k + 1) % 3], t[0], t[1], t[2]))
}

/// Pairs of faces that share no vertex and cross each other. Coplanar
/// contact is not reported.
pub fn self_intersections(mesh: &Mesh) -> Vec<(usize, usize)> {
    let v = &mesh.vertices;
    let boxes: Vec<(Vec3, Vec3)> = mesh
        .faces
        .iter()
        .map(|f| {
            let lo = v[f[0]].inf(&v[f[1]]).inf(&v[f[2]]);
            let hi = v[f[0]].sup(&v[f[1]]).sup(&v[f[2]]);
            (lo, hi)
        })
        .collect();
    let mut order: Vec<usize> = (0..mesh.faces.len()).collect();
    order.sort_by(|&a, &b| boxes[a].0.x.total_cmp(&boxes[b].0.x).then(a.cmp(&b)));
    let mut hits = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let (lo, hi) = &boxes[i];
        for &j in &order[k + 1..] {
            let (lo2, hi2) = &boxes[j];
            if lo2.x > hi.x {
                break;
            }
            if lo2.y > hi.y || lo.y > hi2.y || lo2.z > hi.z || lo.z > hi2.z {
                continue;
            }
            let (fi, fj) = (mesh.faces[i], mesh.faces[j]);
            if fi.iter().any(|a| fj.contains(a)) {
                continue;
            }
            if triangles_intersect(
                [&v[fi[0]], &v[fi[1]], &v[fi[2]]],
                [&v[fj[0]], &v[fj[1]], &v[fj[2]]],
            ) {
                hits.push((i.min(j), i.max(j)));
            }
        }
    }
    hits.sort_unstable();
    hits
}
